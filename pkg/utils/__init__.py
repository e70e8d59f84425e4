"""Utils package"""

